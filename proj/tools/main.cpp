#include "gridfreq/cli.hpp"

int main(int argc, char** argv) { return gridfreq::run_cli(argc, argv); }
