#pragma once

#include <string>
#include <string_view>

#include "tiersql/core.hpp"

// Prompt templates for every LLM step. Placeholders are `{name}` and are
// filled by text::fill_template; everything else is sent as-is.
namespace tiersql::prompts {

inline constexpr std::string_view kSchemaLinking =
    R"tpl(You are a smart and responsible SQLite SQL expert. Assist in identifying the database tables
and columns involved in natural language queries.

### Instruction:

Your task is to analyze the provided database schema, comprehend the posed question, and leverage
the hint to identify which tables are needed to generate a SQL query for answering the question. The returned JSON format must strictly adhere to the following specifications:

{
    "tables": [
        {
            "table": "table name",
            "columns": ["relevant column 1", "relevant column 2", ...]
        },
        ...
    ]
}

Each relevant column must belong to its respective table, and the output JSON object must be
wrapped in a code block using ```json```.
Please note that each table and column comes with detailed description information and example
values for reference.

### Database schema:

{schema_str}

### User question:

{query}

### Hint:
{evidence})tpl";

inline constexpr std::string_view kBasicGeneration =
    R"tpl(You are a intelligent and responsible SQLite expert.

### Instruction:

You need to read the database schema to generate SQL query for the user question.

The outputted SQL must be surrounded by ```sql``` code block.

### Database Schema:

{schema}

### Hint:

{evidence}

### User Question:

{query}

The outputted SQL must be surrounded by ```sql``` code block.)tpl";

inline constexpr std::string_view kDivide =
    R"tpl(You are a smart and responsible SQLite SQL expert. Given a database schema and a question, users
want to know the corresponding SQL query. Your task is to understand the database schema and
question, and decompose the question into sub-questions so user can better understand it.
Each sub-question is enclosed in <<>>. Here is an example
for reference:

### Example:

## Given the database schema:

{example_database_schema}

## Question:

{example_question}

## Decompose the Question into sub-questions, each sub-question is enclosed in
<<>>:

Sub-question 1: <<{sub question 1}>>

Sub-question 2: <<{sub question 2}>>

Sub-question 3: <<{sub question 3}>>

### Your task: decompose the question into sub-questions.

## Given the database schema:

{schema}

## Question:

{query}

## Hint:

{evidence}

## Decompose the Question into sub-questions, each sub-question is enclosed in
<<>>:)tpl";

inline constexpr std::string_view kConquer =
    R"tpl(You are a smart and responsible SQLite SQL expert. Given a database schema and a question,
your tasks are:

1. Parse user questions: Use natural language processing (NLP) techniques to parse user
questions and extract query requirements and conditions.

2. Analyze database schema: Based on the database schema, understand the fields and
relationships of the table, and build the basic framework of the SQL query.

3. Check sample data: Analyze the data characteristics based on the first three rows of
the table values to help determine how to construct query conditions and filter results.

4. Generate SQL query: Based on user questions, query requirements and conditions,
database schema, and sample data, build a complete SQL query.

5. Verification and optimization: Check whether the generated SQL query is logical and
optimize it if necessary.

### Database Schema:

{schema}

### Examples:

{examples}

### Question:

{query}

### Hint:

{evidence}

Please generate the corresponding SQL query. SQL must be surrounded by ```sql``` code block.)tpl";

inline constexpr std::string_view kAssemble =
    R"tpl(You are a smart and responsible SQLite SQL expert. Given a database schema and a question,
users want to know the corresponding SQL query.

### Instructions:

We have decomposed the main question into sub-questions, now your task is based on the SQL querys
for corresponding sub-questions, assemble the final SQL for the main question:

1. Understand the database schema and the main question;

2. Read and analyze each sub-question and corresponding SQL query;

3. Analyze the relationship between sub-questions and the main question in order to assemble them properly;

4. Generate the final SQL for the main question and optimize it if needed.

### Database Schema:

{schema}

### Main question:

{query}

### Hint:

{evidence}

### Sub-questions and corresponding output, including SQL querys and explanation:

{subs}

Based on the SQL querys for corresponding sub-questions, generate the final SQL for the main question
in the end of your response, SQL must be surrounded by ```sql``` code block.)tpl";

inline constexpr std::string_view kOnlineSynthesis =
    R"tpl(### Instruction:

You are a SQLite SQL expert. Your job is to create {k} examples, where each example consists
of a question and a SQL query to fetch the data for it.
I want each example to look like this, question input and SQL output pairs:

### Example:

"Question": "What's the description of the series code SM.POP.TOTL for Aruba?
(Hints: Aruba is the name of the country where ShortName = 'Aruba')"

"SQL": "SELECT T2.Description FROM Country AS T1 INNER JOIN CountryNotes AS T2
ON T1.CountryCode = T2.Countrycode WHERE T1.ShortName = 'Aruba' AND
T2.Seriescode = 'SM.POP.TOTL'"

### Task:

You should generate examples that examine and showcase different aspects and relationships of
the following table schemas, described in "Table creation statements". Understand the database
tables and their relationships. Understand the columns and their types and meanings to construct
interesting examples.

Generate a mixture of SQL examples that include:

• some simple SQL query examples without JOIN

• some SQL query examples with aggregates, like COUNT

• some simple SQL query examples with JOIN

• some complex SQL query examples with nested JOIN

## Database Schema:

{TARGET_DATABASE_SCHEMA}

Generate a total of {k} examples. Only output the examples ('question input' and 'SQL output' pairs), and each example can be separated by a new line.)tpl";

// No published template exists for the corrective round; this one carries
// the question, hint, linked schema, failed SQL and the failure reason.
inline constexpr std::string_view kRefine =
    R"tpl(You are a smart and responsible SQLite SQL expert. The SQL query below was generated for the user question, but executing it {failure}. Correct the SQL query so that it executes successfully and answers the question.

### Database Schema:

{schema}

### Question:

{query}

### Hint:

{evidence}

### Failed SQL:

{sql}

### Execution result:

{reason}

Please generate the corrected SQL query. SQL must be surrounded by ```sql``` code block.)tpl";

// Worked example shown in the divide prompt.
inline constexpr std::string_view kDivideExampleSchema = R"tpl(# Table: Country
[
  (CountryCode: TEXT, Primary Key, Examples: [ABW, AFG, AGO]),
  (ShortName: TEXT, Examples: [Aruba, Afghanistan, Angola]),
  (Region: TEXT, Examples: [Latin America & Caribbean, South Asia, Sub-Saharan Africa])
]
# Table: Indicators
[
  (CountryCode: TEXT, Foreign Key -> Country.CountryCode, Examples: [ABW, AFG, AGO]),
  (IndicatorName: TEXT, Examples: [Population, total, GDP (current US$)]),
  (Year: INTEGER, Examples: [2008, 2009, 2010]),
  (Value: INTEGER, Examples: [101453, 28004331, 23369131])
])tpl";

inline constexpr std::string_view kDivideExampleQuestion =
    "Which region has the most countries whose total population exceeded 10 million in 2010?";

inline constexpr std::string_view kDivideExampleSub1 =
    "Find the countries whose 'Population, total' indicator value in 2010 is greater than 10000000.";
inline constexpr std::string_view kDivideExampleSub2 =
    "Count the qualifying countries in each region.";
inline constexpr std::string_view kDivideExampleSub3 =
    "Return the region with the largest count.";

// ---------------------------------------------------------------------------

struct SchemaRenderOptions {
  bool include_descriptions = true;
  std::size_t max_sample_values = 3;
  bool include_foreign_keys = false;
};

/// Renders the tables and columns of `schema`, restricted to `linked` when
/// given, in the layout used by every prompt.
inline std::string render_schema(const DatabaseSchema& schema, const LinkedSchema* linked,
                                 const SchemaRenderOptions& opts = {}) {
  std::string out;
  auto render_table = [&](const TableDef& table, const std::vector<std::string>* only) {
    if (!out.empty()) out += '\n';
    out += "# Table: " + table.name + "\n[\n";
    bool first = true;
    for (const auto& col : table.columns) {
      if (only != nullptr) {
        bool keep = false;
        for (const auto& c : *only) keep = keep || text::iequals(c, col.name);
        if (!keep) continue;
      }
      if (!first) out += ",\n";
      first = false;
      out += "  (" + col.name + ": " + (col.decl_type.empty() ? "TEXT" : col.decl_type);
      for (const auto& pk : table.primary_key) {
        if (text::iequals(pk, col.name)) {
          out += ", Primary Key";
          break;
        }
      }
      if (opts.include_foreign_keys) {
        for (const auto& fk : table.foreign_keys) {
          if (text::iequals(fk.column, col.name)) {
            out += ", Foreign Key -> " + fk.foreign_table + "." + fk.foreign_column;
          }
        }
      }
      if (opts.include_descriptions && col.description && !col.description->empty()) {
        out += ", " + *col.description;
      }
      const std::size_t n = std::min(opts.max_sample_values, col.sample_values.size());
      if (n > 0) {
        out += ", Examples: [";
        for (std::size_t i = 0; i < n; ++i) {
          if (i > 0) out += ", ";
          out += col.sample_values[i];
        }
        out += "]";
      }
      out += ")";
    }
    out += "\n]";
  };

  if (linked == nullptr) {
    for (const auto& t : schema.tables) render_table(t, nullptr);
  } else {
    for (const auto& entry : linked->entries) {
      if (const TableDef* t = schema.find_table(entry.table)) render_table(*t, &entry.columns);
    }
  }
  return out;
}

}  // namespace tiersql::prompts
