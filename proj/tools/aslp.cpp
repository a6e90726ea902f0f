#include "aslp/cli.hpp"

int main(int argc, char** argv) { return aslp::cli::run(argc, argv); }
