#include "optibfm/cli.hpp"

int main(int argc, char** argv) { return optibfm::run_cli(argc, argv); }
