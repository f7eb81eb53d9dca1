# Scene flow domain package
