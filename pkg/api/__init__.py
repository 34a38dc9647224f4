# Command handlers and the pydantic schemas of every file the tools read or write
