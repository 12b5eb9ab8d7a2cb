# Core speech recognition modules
