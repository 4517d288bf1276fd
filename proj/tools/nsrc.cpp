#include <string>
#include <vector>

#include "nsrc/cli.hpp"

int main(int argc, char** argv) {
  return nsrc::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
