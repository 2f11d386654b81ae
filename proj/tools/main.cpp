#include "cli.hpp"

int main(int argc, char** argv) { return ptycho::cli::run(argc, argv); }
