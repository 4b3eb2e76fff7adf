#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "strv/cli/config.hpp"
#include "strv/retrieval/retrieval.hpp"

namespace strv::cli {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitDomainError = 1;
inline constexpr int kExitUsageError = 2;

// Overlays the [retrieval] section of a config file. A `subpool` list wins
// over `subpool_size`; the latter is left for resolve_subpool.
retrieval::RetrievalConfig apply_retrieval_section(const ConfigFile& file, retrieval::RetrievalConfig base);
// Inverse of apply_retrieval_section, with the subpool written as a list.
ConfigFile retrieval_section(const retrieval::RetrievalConfig& config);

// Runs one command line (argv[0] is the program name). Usage errors print the
// help text to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace strv::cli
