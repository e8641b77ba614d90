#include "ddimedit/cli.hpp"

int main(int argc, char** argv) { return ddimedit::cli::run(argc, argv); }
