#pragma once

namespace nplab {

// argv-style entry point shared by the nplab binary and the acceptance
// harness.  Exit codes: 0 success, 1 config errors (bad flags, bad config,
// unknown keys), 2 data errors (unreadable/corrupt inputs, stage failures),
// 3 invariant violations.
int cli_main(int argc, const char* const* argv);

}  // namespace nplab
