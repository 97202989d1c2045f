#include <iostream>

#include "capsnlstm/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return capsnlstm::cli::run(args, std::cout, std::cerr);
}
