#pragma once

#include <memory>
#include <string_view>

#include "superpose/lm.hpp"

namespace superpose {

/// "reference-alibi", "reference-rotary" or "remote:<host>:<port>".
std::unique_ptr<Backend> make_backend(std::string_view uri);

}  // namespace superpose
