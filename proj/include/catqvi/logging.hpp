#pragma once

#include <spdlog/spdlog.h>

namespace catqvi {

/// Configures the default spdlog logger. The level comes from the
/// CATQVI_LOG environment variable (trace, debug, info, warn, error, off);
/// unset means warn.
void init_logging();

}  // namespace catqvi
