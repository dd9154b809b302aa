#pragma once

namespace rqpipe {
inline constexpr const char* kToolkitVersion = "0.1.0";
}
