#include <iostream>
#include <string>
#include <vector>

#include "restrain/harness.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return restrain::cli_run(args, std::cout, std::cerr);
}
