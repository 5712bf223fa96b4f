#include "fsl/cli.hpp"

int main(int argc, char** argv) { return fsl::cli_main(argc, argv); }
