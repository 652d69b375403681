#include "powerskel/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "powerskel/error.hpp"

namespace powerskel::eval {

namespace {

int AlphaColumn(const std::vector<double> &alphas, double alpha) {
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (std::abs(alphas[i] - alpha) < 1e-12) return static_cast<int>(i);
  }
  Fail(ErrorKind::kIndex, "alpha " + std::to_string(alpha) + " not in table");
}

std::string ColumnName(double alpha) {
  return "PCK@" + std::to_string(static_cast<int>(std::lround(alpha * 100.0)));
}

double Clamp(double v) { return std::clamp(v, 0.0, 100.0); }

}  // namespace

void PCKConfig::Validate() const {
  Require(!alphas.empty(), ErrorKind::kConfig, "at least one alpha required");
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    Require(alphas[i] > 0.0, ErrorKind::kConfig, "alphas must be positive");
    Require(i == 0 || alphas[i] > alphas[i - 1], ErrorKind::kConfig,
            "alphas must be strictly increasing");
  }
  Require(rs_index >= 0 && rs_index < kNumKeypoints && lh_index >= 0 &&
              lh_index < kNumKeypoints,
          ErrorKind::kConfig, "torso keypoint index out of range");
  Require(rs_index != lh_index, ErrorKind::kConfig, "torso keypoints must be distinct");
}

double TorsoLength(const SkeletonFrame &gt, const PCKConfig &config) {
  const auto &rs = gt.keypoints[config.rs_index];
  const auto &lh = gt.keypoints[config.lh_index];
  const double d = std::hypot(rs.x - lh.x, rs.y - lh.y);
  Require(d > 0.0, ErrorKind::kDegeneratePose, "zero torso length");
  return d;
}

double PckTable::at(int keypoint, double alpha) const {
  Require(keypoint >= 0 && keypoint < kNumKeypoints, ErrorKind::kIndex, "keypoint out of range");
  return values(keypoint, AlphaColumn(alphas, alpha));
}

double PckTable::average_at(double alpha) const { return average[AlphaColumn(alphas, alpha)]; }

PckTable Pck(std::span<const Vector> preds, std::span<const SkeletonFrame> gts,
             const PCKConfig &config) {
  config.Validate();
  Require(preds.size() == gts.size(), ErrorKind::kShape,
          "pck: " + std::to_string(preds.size()) + " predictions for " +
              std::to_string(gts.size()) + " ground truths");
  Require(!preds.empty(), ErrorKind::kEmptyReport, "pck: no samples");

  const auto n_alpha = static_cast<Eigen::Index>(config.alphas.size());
  PckTable table;
  table.alphas = config.alphas;
  Matrix hits = Matrix::Zero(kNumKeypoints, n_alpha);
  Vector counted = Vector::Zero(kNumKeypoints);

  for (std::size_t n = 0; n < preds.size(); ++n) {
    const auto &gt = gts[n];
    Require(preds[n].size() == kLabelDim, ErrorKind::kShape, "prediction must have 34 entries");
    if (!gt.visibility[config.rs_index] || !gt.visibility[config.lh_index]) {
      ++table.excluded_invisible;
      continue;
    }
    double torso = 0.0;
    try {
      torso = TorsoLength(gt, config);
    } catch (const Error &) {
      ++table.excluded_degenerate;
      continue;
    }
    ++table.evaluated;
    for (int j = 0; j < kNumKeypoints; ++j) {
      if (!gt.visibility[j]) continue;
      counted[j] += 1.0;
      const double dist = std::hypot(preds[n][2 * j] - gt.keypoints[j].x,
                                     preds[n][2 * j + 1] - gt.keypoints[j].y) /
                          torso;
      for (Eigen::Index a = 0; a < n_alpha; ++a) {
        if (dist <= config.alphas[a]) hits(j, a) += 1.0;
      }
    }
  }
  Require(table.evaluated > 0, ErrorKind::kEmptyReport, "pck: every sample was excluded");

  table.values = Matrix::Zero(kNumKeypoints, n_alpha);
  for (int j = 0; j < kNumKeypoints; ++j) {
    if (counted[j] > 0) table.values.row(j) = 100.0 * hits.row(j) / counted[j];
  }
  table.average = table.values.colwise().mean().transpose();
  return table;
}

std::string Report(const PckTable &table) {
  std::ostringstream os;
  os << "# evaluated " << table.evaluated << " excluded_degenerate " << table.excluded_degenerate
     << " excluded_invisible " << table.excluded_invisible << "\n";
  os << std::left << std::setw(12) << "Keypoint";
  for (double a : table.alphas) os << std::right << std::setw(9) << ColumnName(a);
  os << "\n" << std::fixed << std::setprecision(2);
  auto row = [&](std::string_view name, auto values) {
    os << std::left << std::setw(12) << name;
    for (Eigen::Index a = 0; a < values.size(); ++a) {
      os << std::right << std::setw(9) << Clamp(values[a]);
    }
    os << "\n";
  };
  for (int j = 0; j < kNumKeypoints; ++j) row(JointName(j), table.values.row(j));
  row("Average", table.average);
  return os.str();
}

PckTable ParseReport(const std::string &text) {
  std::istringstream in(text);
  std::string line;
  PckTable table;
  std::vector<std::vector<double>> rows;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "#") {
      std::string key;
      std::size_t value = 0;
      while (ls >> key >> value) {
        if (key == "evaluated") table.evaluated = value;
        if (key == "excluded_degenerate") table.excluded_degenerate = value;
        if (key == "excluded_invisible") table.excluded_invisible = value;
      }
      continue;
    }
    if (word == "Keypoint") {
      while (ls >> word) {
        Require(word.rfind("PCK@", 0) == 0, ErrorKind::kDecode, "bad report column " + word);
        table.alphas.push_back(std::stod(word.substr(4)) / 100.0);
      }
      have_header = true;
      continue;
    }
    Require(have_header, ErrorKind::kDecode, "report row before header");
    std::vector<double> values;
    double v = 0.0;
    while (ls >> v) values.push_back(v);
    Require(values.size() == table.alphas.size(), ErrorKind::kDecode,
            "report row '" + word + "' has " + std::to_string(values.size()) + " values");
    if (word == "Average") {
      table.average = Eigen::Map<Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
    } else {
      Require(JointIndex(word).has_value(), ErrorKind::kDecode, "unknown keypoint " + word);
      rows.push_back(std::move(values));
    }
  }
  Require(rows.size() == kNumKeypoints && table.average.size() > 0, ErrorKind::kDecode,
          "report must contain 17 keypoint rows and an Average row");
  table.values.resize(kNumKeypoints, static_cast<Eigen::Index>(table.alphas.size()));
  for (int j = 0; j < kNumKeypoints; ++j) {
    for (std::size_t a = 0; a < table.alphas.size(); ++a) table.values(j, a) = rows[j][a];
  }
  return table;
}

nlohmann::json ToJson(const PckTable &table) {
  nlohmann::json keypoints = nlohmann::json::object();
  for (int j = 0; j < kNumKeypoints; ++j) {
    std::vector<double> row(table.values.cols());
    for (Eigen::Index a = 0; a < table.values.cols(); ++a) row[a] = table.values(j, a);
    keypoints[std::string(JointName(j))] = row;
  }
  return {{"alphas", table.alphas},
          {"keypoints", keypoints},
          {"average", std::vector<double>(table.average.begin(), table.average.end())},
          {"evaluated", table.evaluated},
          {"excluded_degenerate", table.excluded_degenerate},
          {"excluded_invisible", table.excluded_invisible}};
}

PckTable PckTableFromJson(const nlohmann::json &j) {
  PckTable t;
  t.alphas = j.at("alphas").get<std::vector<double>>();
  const auto n_alpha = static_cast<Eigen::Index>(t.alphas.size());
  t.values.resize(kNumKeypoints, n_alpha);
  for (int k = 0; k < kNumKeypoints; ++k) {
    const auto row = j.at("keypoints").at(std::string(JointName(k))).get<std::vector<double>>();
    Require(static_cast<Eigen::Index>(row.size()) == n_alpha, ErrorKind::kDecode,
            "keypoint row width mismatch");
    for (Eigen::Index a = 0; a < n_alpha; ++a) t.values(k, a) = row[a];
  }
  const auto avg = j.at("average").get<std::vector<double>>();
  t.average = Eigen::Map<const Vector>(avg.data(), static_cast<Eigen::Index>(avg.size()));
  t.evaluated = j.value("evaluated", std::size_t{0});
  t.excluded_degenerate = j.value("excluded_degenerate", std::size_t{0});
  t.excluded_invisible = j.value("excluded_invisible", std::size_t{0});
  return t;
}

namespace {

std::string XmlEscape(const std::string &text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string RenderSvg(const SkeletonFrame &gt, const SkeletonFrame &pred,
                      const std::string &title) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1);
  const int w = static_cast<int>(kImageWidth), h = static_cast<int>(kImageHeight);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!title.empty()) {
    os << "<text x=\"8\" y=\"18\" font-family=\"monospace\" font-size=\"13\">" << XmlEscape(title)
       << "</text>\n";
  }
  auto draw = [&](const SkeletonFrame &s, const char *colour, const char *id, bool dashed) {
    os << "<g id=\"" << id << "\" stroke=\"" << colour << "\" fill=\"" << colour
       << "\" stroke-width=\"3\"" << (dashed ? " stroke-dasharray=\"6,3\"" : "") << ">\n";
    for (const auto &[a, b] : SkeletonBones()) {
      if (!s.visibility[a] || !s.visibility[b]) continue;
      os << "<line x1=\"" << s.keypoints[a].x << "\" y1=\"" << s.keypoints[a].y << "\" x2=\""
         << s.keypoints[b].x << "\" y2=\"" << s.keypoints[b].y << "\"/>\n";
    }
    for (int j = 0; j < kNumKeypoints; ++j) {
      if (!s.visibility[j]) continue;
      os << "<circle cx=\"" << s.keypoints[j].x << "\" cy=\"" << s.keypoints[j].y
         << "\" r=\"4\"><title>" << JointName(j) << "</title></circle>\n";
    }
    os << "</g>\n";
  };
  draw(gt, "#2a7d2a", "ground-truth", false);
  draw(pred, "#c0392b", "prediction", true);
  os << "</svg>\n";
  return os.str();
}

}  // namespace powerskel::eval
