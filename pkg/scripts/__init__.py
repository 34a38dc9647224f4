# Standalone data-preparation scripts
