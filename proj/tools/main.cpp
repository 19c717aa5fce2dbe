#include <iostream>
#include <string>
#include <vector>

#include "tltrade/cli.hpp"

int main(int argc, char** argv) {
  return tlt::cli_dispatch(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
