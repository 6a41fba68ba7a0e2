#include "rlim/runner.hpp"

int main(int argc, char** argv) { return rlim::runner::cli_dispatch(argc, argv); }
