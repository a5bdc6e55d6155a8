#include "cli.hpp"

int main(int argc, char** argv) { return decompkan::cli::run_cli(argc, argv); }
