#pragma once

#include <string_view>

namespace condreg {

// Warnings go to stderr; CONDREG_QUIET=1 silences them.
void warn(std::string_view message);

}  // namespace condreg
