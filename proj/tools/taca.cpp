#include "taca/cli.hpp"

int main(int argc, char** argv) { return taca::cli::run(argc, argv); }
