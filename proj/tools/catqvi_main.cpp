#include "catqvi/cli.hpp"

int main(int argc, char** argv) { return catqvi::run_cli(argc, argv); }
