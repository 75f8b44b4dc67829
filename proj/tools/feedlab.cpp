#include "feedlab_cli.hpp"

int main(int argc, char** argv) { return feedlab::cli::run(argc, argv); }
