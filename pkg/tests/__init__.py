# bcgn test suite
