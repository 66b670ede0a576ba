#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hypergrid {

/**
 * Entry point of the hypergrid command line. args excludes the program name.
 * Returns 0 on success, 1 on usage errors (usage on err), 2 on data or index
 * errors (diagnostic on err).
 */
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace hypergrid
