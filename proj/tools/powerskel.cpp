#include "powerskel/cli.hpp"

int main(int argc, char **argv) { return powerskel::cli::Run(argc, argv); }
