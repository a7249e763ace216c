#include <string>
#include <vector>

#include "daegan/cli.hpp"

int main(int argc, char** argv) {
  return daegan::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
