#pragma once

#include <ostream>

namespace mdgen {

/// Entry point of the mdgen binary. Returns 0 on success, 1 on a usage error,
/// 2 on a data error. Diagnostics go to `err` as single lines.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mdgen
