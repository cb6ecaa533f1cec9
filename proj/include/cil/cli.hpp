#pragma once

namespace cil {

/// The cil_lab entry point, callable in-process by tests. Exit codes:
/// 0 success, 1 gradcheck violation, 2 configuration/ingestion error,
/// 3 numeric failure during training.
int run_cli(int argc, const char* const* argv);

} // namespace cil
