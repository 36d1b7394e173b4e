#include <iostream>
#include <string>
#include <vector>

#include "flowsim/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return flowsim::cli::run(args, std::cout, std::cerr);
}
