#pragma once

namespace olens {

// Full command-line surface: prepare-data, pretrain, finetune, ensemble-train,
// evaluate, predict, reproduce, sweep. Returns the process exit code:
// 0 success, 1 runtime failure, 2 usage error.
int run_cli(int argc, const char* const* argv);

}  // namespace olens
