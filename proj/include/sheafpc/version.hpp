#pragma once

namespace sheafpc {
inline constexpr const char* kVersion = "0.1.0";
}
