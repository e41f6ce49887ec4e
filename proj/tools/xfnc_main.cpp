#include <string>
#include <vector>

#include "xfnc/cli.hpp"

int main(int argc, char** argv) {
  return xfnc::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
