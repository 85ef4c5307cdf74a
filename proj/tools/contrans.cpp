#include "contrans/cli.hpp"

int main(int argc, char** argv) { return contrans::cli::run_cli(argc, argv); }
