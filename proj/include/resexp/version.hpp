#pragma once

namespace resexp {
inline constexpr const char* kVersion = "0.1.0";
}
