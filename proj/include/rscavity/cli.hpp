#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rscavity {

/// Exit codes: 0 success, 1 solver non-convergence, 2 invalid configuration.
int cli_main(int argc, const char* const* argv);
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// "a:b:step" (inclusive), "z1,z2,..." or a single value.
std::vector<double> parse_zeta_spec(const std::string& spec);

}  // namespace rscavity
