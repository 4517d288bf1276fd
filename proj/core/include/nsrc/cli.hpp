#pragma once

#include <string>
#include <vector>

namespace nsrc::cli {

// Subcommand dispatch: simulate, train, reconstruct, evaluate, gradcheck,
// bias-demo, ablate. Returns 0 on success, 1 on validation failure, 2 on
// usage errors.
int run(const std::vector<std::string>& args);

}  // namespace nsrc::cli
