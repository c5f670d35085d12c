#pragma once

namespace rarlhf {
inline constexpr const char* kVersion = "0.1.0";
}
