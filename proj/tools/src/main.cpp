#include <iostream>
#include <string>
#include <vector>

#include "ctxbert/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return ctxbert::cli::run(args, std::cout, std::cerr);
}
