#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace nudgex::gateway {

/// Exit codes: 0 success, 1 an item or request failed, 2 usage or
/// configuration error, 3 stage prerequisites missing, 4 data root busy.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nudgex::gateway
