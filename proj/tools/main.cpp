#include "basnet/cli.hpp"

int main(int argc, char** argv) { return basnet::cli::run(argc, argv); }
