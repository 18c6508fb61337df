#include "stormadapt/cli.hpp"

int main(int argc, char** argv) { return stormadapt::dispatch(argc, argv); }
