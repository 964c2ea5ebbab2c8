#pragma once

namespace subgp {
inline constexpr const char* kVersion = "0.1.0";
}
