#include "cbt/cli.hpp"

int main(int argc, char** argv) { return cbt::cli::run(argc, argv); }
