#pragma once

#include <string>

#include "rearlab/config.hpp"

namespace rear {

// Each command reads its inputs from the config, writes every artifact under
// out_dir together with an effective-config snapshot, and is deterministic
// given the seed. Throws std::invalid_argument for usage errors, IntegrityError
// for corrupt/mismatched artifacts, std::runtime_error otherwise.
void cmd_tokenizer_train(const RunConfig& cfg);
void cmd_tokenize(const RunConfig& cfg);
void cmd_ar_train(const RunConfig& cfg);
void cmd_sample(const RunConfig& cfg);
void cmd_diagnose(const RunConfig& cfg);
void cmd_report(const RunConfig& cfg);

}  // namespace rear
