#pragma once

namespace dgsp {

// Entry point behind main(): gen-data | pretrain | train | eval | predict.
// Returns 0 on success, 1 on usage/config errors, 2 on data/runtime errors.
int cli_main(int argc, char** argv);

}  // namespace dgsp
