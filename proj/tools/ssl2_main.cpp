#include "ssl2/cli.hpp"

int main(int argc, char** argv) { return ssl2::run_cli(argc, argv); }
