#include "condreg/log.hpp"

#include <cstdlib>
#include <iostream>

namespace condreg {

void warn(std::string_view message) {
  static const bool quiet = [] {
    const char* env = std::getenv("CONDREG_QUIET");
    return env != nullptr && std::string_view(env) == "1";
  }();
  if (!quiet) std::cerr << "warning: " << message << '\n';
}

}  // namespace condreg
