#include <iostream>

#include "semidpo/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return semidpo::run_cli(args, std::cout, std::cerr);
}
