#pragma once

#include <string>
#include <vector>

namespace fsl {

// Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
int cli_main(int argc, char** argv);
int cli_main(const std::vector<std::string>& args);

}  // namespace fsl
