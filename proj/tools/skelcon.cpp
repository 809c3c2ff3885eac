#include "skelcon/cli.hpp"

int main(int argc, char** argv) { return skelcon::cli::run(argc, argv); }
