#include <iostream>
#include <string>
#include <vector>

#include "seadet/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return seadet::cli::run(std::move(args), std::cout, std::cerr);
}
