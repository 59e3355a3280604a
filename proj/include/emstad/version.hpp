#pragma once

namespace emstad {
inline constexpr const char* kVersion = "0.1.0";
}
