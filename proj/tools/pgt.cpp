#include <iostream>

#include "pgt/cli.hpp"

int main(int argc, char** argv) {
  return pgt::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
