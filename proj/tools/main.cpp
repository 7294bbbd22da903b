#include "forgesem/cli.hpp"

int main(int argc, char** argv) { return forgesem::cli_run(argc, argv); }
