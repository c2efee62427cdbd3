#include <iostream>
#include <string>
#include <vector>

#include "tcbp/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return tcbp::cli::run(args, std::cout, std::cerr);
}
