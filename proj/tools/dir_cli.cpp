#include "dir/experiment.hpp"

int main(int argc, char** argv) { return dir::run_cli(argc, argv); }
