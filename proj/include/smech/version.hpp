#pragma once

namespace smech {

inline constexpr const char* kVersion = "0.1.0";

} // namespace smech
