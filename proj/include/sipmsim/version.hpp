#pragma once

namespace sipmsim {

inline constexpr const char* kVersion = "0.1.0";

}
