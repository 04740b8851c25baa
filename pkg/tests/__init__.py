# Test package for flowcount
